"""Run configuration: JSON schema, defaults and loading."""
