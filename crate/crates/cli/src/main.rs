fn main() {
    println!("latkit");
}
