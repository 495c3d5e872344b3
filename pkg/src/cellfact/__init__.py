"""cellfact: statistical-CSV topology classification, schema-guided
serialization, deterministic gold facts, and knowledge-graph fidelity
evaluation."""

__version__ = "0.1.0"
