fn main() {
    std::process::exit(rsbm_harness::cli::run_cli(std::env::args_os()));
}
