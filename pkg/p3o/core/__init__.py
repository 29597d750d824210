# Core configuration, services and the numerical library
