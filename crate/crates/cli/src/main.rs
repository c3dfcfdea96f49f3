fn main() {
    let code = wsod_cli::run_command(std::env::args_os());
    std::process::exit(code);
}
