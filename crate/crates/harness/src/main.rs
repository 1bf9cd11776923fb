fn main() {
    std::process::exit(cdcma_harness::cli::main_with_args(std::env::args_os()));
}
