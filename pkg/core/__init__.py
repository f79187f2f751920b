# Core business logic package

