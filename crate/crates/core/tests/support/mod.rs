#![allow(dead_code)]

pub mod hautus;
