#![allow(dead_code)]

pub mod bn;
pub mod fd;
pub mod gradcheck;
pub mod oracles;
pub mod probe;
