//! Training-free alpha matte extraction.
//!
//! Fits three untrained U-nets to a single image: one reconstructs the image
//! and carries a second head for the alpha matte, the other two extrapolate
//! foreground and background colors. A six-term loss couples them through
//! the compositing equation on the trimap's unknown region. No training
//! data, no clean plate — only the image and a coarse trimap.

pub mod engine;
pub mod eval;
pub mod io;
pub mod nn;
pub mod tensor;
