// mdbook cannot run examples that depend on workspace crates, so every
// chapter is included here as the docs of an empty module and `cargo test
// --doc -p lpkm-book` runs the listings. A module per chapter keeps failure
// names pointing at the right file.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/keypoints.md")]
pub mod keypoints {}
#[doc = include_str!("src/rendering.md")]
pub mod rendering {}
#[doc = include_str!("src/retargeting.md")]
pub mod retargeting {}
#[doc = include_str!("src/training.md")]
pub mod training {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
#[doc = include_str!("src/formats.md")]
pub mod formats {}
