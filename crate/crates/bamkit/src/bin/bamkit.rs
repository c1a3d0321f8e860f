fn main() {
    std::process::exit(bamkit::pipeline::run_cli());
}
