import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    include: ['tests/**/*.test.ts'],
    // the contract suite boots a real server; give it room
    testTimeout: 120_000,
    hookTimeout: 180_000,
  },
});
