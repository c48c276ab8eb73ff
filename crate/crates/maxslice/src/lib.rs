//! Maximal spacelike graphs in orthogonal-splitted spacetimes
//! `-beta dt^2 + g_t` over periodic one- and two-dimensional fibers.

pub mod fiber_calculus;
pub mod spacetime_models;
pub mod hypersurface_geometry;
pub mod maximal_solver;
pub mod experiment;
