pub mod fixtures;
pub mod oracle;
pub mod stacks;
