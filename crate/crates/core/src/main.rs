fn main() {
    std::process::exit(seqal::cli::main_with_args(std::env::args_os()));
}
