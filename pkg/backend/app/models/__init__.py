# Schemas and numpy domain types
