fn main() { std::process::exit(cognn::cli::dispatch(std::env::args().collect())) }
