//! A guide to `gempic`, one module per chapter.

#[doc = include_str!("../../../book/src/ch01-getting-started.md")]
pub mod chapter1 {}

#[doc = include_str!("../../../book/src/ch02-complex.md")]
pub mod chapter2 {}

#[doc = include_str!("../../../book/src/ch03-mass.md")]
pub mod chapter3 {}

#[doc = include_str!("../../../book/src/ch04-particles.md")]
pub mod chapter4 {}

#[doc = include_str!("../../../book/src/ch05-integrators.md")]
pub mod chapter5 {}

#[doc = include_str!("../../../book/src/ch06-runs.md")]
pub mod chapter6 {}
