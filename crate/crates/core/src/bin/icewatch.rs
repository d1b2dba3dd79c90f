fn main() {
    std::process::exit(icewatch::harness::main_with_args(std::env::args_os()));
}
