// Acceptance suite: filled in as the pipeline lands.
