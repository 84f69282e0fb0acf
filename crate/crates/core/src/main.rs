fn main() {
    std::process::exit(kitro::cli::run(std::env::args_os()));
}
