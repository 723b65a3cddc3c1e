fn main() {
    println!("ymh placeholder");
}
