fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(causal_retrieval::cli::main_with_args(args));
}
