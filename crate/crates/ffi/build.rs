//! Generate the committed C header from the extern "C" surface.
//!
//! The header lands in `include/actsel.h` inside the crate so downstream
//! builds can consume it without running cargo; it is rewritten only when
//! its contents change, which keeps rebuilds quiet and makes staleness
//! visible in version control.

use std::fs;
use std::path::Path;

fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("cargo sets CARGO_MANIFEST_DIR");
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let bindings = cbindgen::generate(&crate_dir).expect("cbindgen generates the header");
    let mut rendered = Vec::new();
    bindings.write(&mut rendered);

    let header_path = Path::new(&crate_dir).join("include").join("actsel.h");
    let stale = fs::read(&header_path).map(|old| old != rendered).unwrap_or(true);
    if stale {
        fs::create_dir_all(header_path.parent().expect("include dir has a parent"))
            .expect("include directory is writable");
        fs::write(&header_path, &rendered).expect("header is writable");
    }
}
