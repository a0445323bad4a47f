pub mod camera;
pub mod config;
pub mod protocol;
pub mod replay;
pub mod script;
pub mod session;
pub mod serve;
