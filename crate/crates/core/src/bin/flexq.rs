fn main() {
    std::process::exit(flexquad::experiment::main_with_args(std::env::args_os()));
}
