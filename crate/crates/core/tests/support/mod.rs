pub mod adversarial;
pub mod metric_oracle;
pub mod packages_oracle;
pub mod prune_oracle;
pub mod rule_oracle;
pub mod summary_oracle;
