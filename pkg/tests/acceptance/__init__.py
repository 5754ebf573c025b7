"""microus-screen acceptance tests."""
