# Pydantic schemas: enums, run configuration, artifact records and CLI invocations
