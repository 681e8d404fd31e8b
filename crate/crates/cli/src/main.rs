use clap::Parser;

fn main() {
    let cli = dialoguekit_cli::Cli::parse();
    std::process::exit(dialoguekit_cli::run(cli));
}
