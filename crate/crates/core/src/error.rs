use thiserror::Error;

/// Errors raised by mesh construction, assembly, and the experiment driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh construction: {0}")]
    Mesh(String),

    #[error("unsupported quadrature degree {degree} (maximum is {max})")]
    QuadratureDegree { degree: usize, max: usize },

    #[error("element index {index} out of range ({count} elements)")]
    ElementIndex { index: usize, count: usize },

    #[error("edge {0} is a boundary edge; a boundary datum is required")]
    BoundaryEdge(usize),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("singular local mass matrix on element {0}")]
    SingularMass(usize),

    #[error("non-finite value in {what} on element {element}")]
    NonFinite { what: &'static str, element: usize },

    #[error("wells are not rank-one connected: {0}")]
    Infeasible(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
