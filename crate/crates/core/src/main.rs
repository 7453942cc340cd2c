fn main() {
    std::process::exit(gridforge_core::cli::cli_dispatch(std::env::args().collect()))
}
