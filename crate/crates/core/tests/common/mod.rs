#![allow(dead_code)]

pub mod kernel_oracle;
pub mod tau_oracle;
