pub mod geometry;
pub mod litho;
pub mod metrics;
pub mod opc;
pub mod rl;
pub mod features;
pub mod recipes;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/litho.md")]
    mod litho {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/opc.md")]
    mod opc {}
    #[doc = include_str!("../../../book/src/rl.md")]
    mod rl {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/recipes.md")]
    mod recipes {}
}
