"""microus-screen test suite."""
