fn main() {
    std::process::exit(peakfn::cli::main_with_args(std::env::args_os()));
}
