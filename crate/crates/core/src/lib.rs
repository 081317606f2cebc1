pub mod autodiff;
pub mod nets;
pub mod optim;
pub mod orderparams;
pub mod pinn;
pub mod policy;
pub mod sde;
pub mod sde_learn;
pub mod sinkhorn;
