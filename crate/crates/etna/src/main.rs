fn main() { std::process::exit(etna::cli::run()); }
