fn main() {
    eprintln!("not yet wired up");
}
