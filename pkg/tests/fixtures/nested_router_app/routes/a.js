const express = require('express');
const cRouter = require('./c');

const router = express.Router();

function getB(req, res) {
  const limit = parseInt(req.query.limit || '10', 10);
  res.json(items.slice(0, limit));
}

const items = [{ id: 1, name: 'first' }, { id: 2, name: 'second' }];

router.get('/b', getB);
router.use('/c', cRouter);

module.exports = router;
