use thiserror::Error;

/// Errors raised while building or querying tabular MDPs and task sets.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("row ({state}, {action}) is not a probability vector: {reason}")]
    NotSimplex {
        state: usize,
        action: usize,
        reason: String,
    },
    #[error("reward r({state}, {action}) = {value} outside [0, 1]")]
    Reward {
        state: usize,
        action: usize,
        value: f64,
    },
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("invalid policy: {0}")]
    Policy(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskSetError {
    #[error("task set is empty")]
    Empty,
    #[error("task {index} does not share the common shape: {reason}")]
    ShapeMismatch { index: usize, reason: String },
    #[error("operation needs at least two tasks")]
    Singleton,
    #[error("invalid task index {0}")]
    InvalidIndex(usize),
    #[error("not a partition: {0}")]
    NotPartition(String),
    #[error("no valid split: no strongly reachable pair yields a balanced partition")]
    NoValidSplit,
    #[error("empty policy list")]
    EmptyPolicies,
    #[error("revealing set is empty")]
    EmptyRevealingSet,
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentifyError {
    #[error("episode budget exhausted after {used} episodes")]
    BudgetExhausted { used: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sample outcome {outcome} out of range for support of size {len}")]
    SampleOutOfRange { outcome: usize, len: usize },
    #[error("too many uncovered pairs for the coverage game: {0} > 12")]
    CoverageTooLarge(usize),
    #[error(transparent)]
    TaskSet(#[from] TaskSetError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("parameter constraint violated: {0}")]
    Constraint(String),
    #[error("infeasible shape: {0}")]
    Infeasible(String),
    #[error("repair loop exhausted after {0} attempts")]
    RepairExhausted(usize),
    #[error(transparent)]
    TaskSet(#[from] TaskSetError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("the bound needs at least one alternative task")]
    Singleton,
    #[error("invalid task index {0}")]
    InvalidIndex(usize),
    #[error("allocation shape does not match the MDP")]
    Shape,
    #[error("linear program failed: {0}")]
    Lp(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BanditError {
    #[error("invalid bandit task: {0}")]
    InvalidTask(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("pull budget exhausted after {used} pulls")]
    BudgetExhausted { used: usize },
}
