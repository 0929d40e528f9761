# Domain types
