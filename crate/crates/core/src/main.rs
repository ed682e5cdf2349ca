fn main() {
    std::process::exit(edge_unlearn::cli::main_with(std::env::args_os()));
}
