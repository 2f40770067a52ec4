use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = env::var("CARGO_MANIFEST_DIR").unwrap();
    let config = cbindgen::Config::from_file(PathBuf::from(&crate_dir).join("cbindgen.toml"))
        .expect("cbindgen.toml");
    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        Ok(bindings) => {
            let out = PathBuf::from(&crate_dir).join("include").join("margrisk.h");
            std::fs::create_dir_all(out.parent().unwrap()).unwrap();
            bindings.write_to_file(out);
        }
        Err(err) => {
            // Header generation failing should not break `cargo build` for
            // consumers that only need the Rust library.
            println!("cargo:warning=cbindgen failed: {err}");
        }
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
