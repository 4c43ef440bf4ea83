use std::process::exit;

fn main() {
    exit(tssdn_sim::cli::main_entry(std::env::args_os()));
}
