use clap::Parser;

fn main() {
    let cli = mailbox_cli::Cli::parse();
    std::process::exit(mailbox_cli::run(cli));
}
