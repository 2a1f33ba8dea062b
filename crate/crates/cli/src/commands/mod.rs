pub mod align;
pub mod eval;
pub mod gen;
pub mod selftest;
