fn main() {
    // CLI wired up once the experiment harness lands.
}
