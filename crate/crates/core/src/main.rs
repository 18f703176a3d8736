fn main() {
    std::process::exit(poc_harness::cli::cli_dispatch(std::env::args_os()));
}
