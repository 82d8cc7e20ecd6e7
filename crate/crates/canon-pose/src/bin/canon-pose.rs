fn main() {
    std::process::exit(canon_pose::cli::run(std::env::args()));
}
