fn main() {
    std::process::exit(biphoton_lab::run(std::env::args_os()));
}
