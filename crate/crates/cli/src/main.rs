fn main() {
    std::process::exit(orasp_cli::run_cli(std::env::args_os()));
}
