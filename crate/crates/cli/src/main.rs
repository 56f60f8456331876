fn main() {
    println!("sqtk");
}
