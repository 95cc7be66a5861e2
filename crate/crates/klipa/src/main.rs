use std::io;

fn main() {
    let env: Vec<(String, String)> = std::env::vars().collect();
    let stdin = io::stdin();
    let code = klipa::cli::run_with(
        std::env::args_os(),
        &env,
        &mut stdin.lock(),
        &mut io::stdout(),
        &mut io::stderr(),
        klipa::cli::init_logging,
    );
    std::process::exit(code);
}
