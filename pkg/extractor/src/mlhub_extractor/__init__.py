"""Bridge real image classifiers to the hub: pre-test them over
node-organized image folders and emit trace files in the hub's store
format, plus embedding files usable as an external matching provider."""

CREATOR = "mlhub-extractor/0.1.0"
