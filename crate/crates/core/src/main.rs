fn main() {
    std::process::exit(substream::bench::cli_main(std::env::args()));
}
