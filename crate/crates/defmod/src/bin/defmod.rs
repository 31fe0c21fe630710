fn main() {
    std::process::exit(defmod::cli::run());
}
