# Core package
