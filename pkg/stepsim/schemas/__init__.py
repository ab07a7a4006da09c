# Config schemas
