fn main() {
    println!("occlusim");
}
