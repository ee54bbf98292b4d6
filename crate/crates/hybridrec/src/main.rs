fn main() {
    std::process::exit(hybridrec::cli::run());
}
